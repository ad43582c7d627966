//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or runtime errors.
//! Results go to files and standard output; progress goes to standard error.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datasets::{read_manifest, read_manifest_with_classes, ClassSubset};
use crate::error::Error;
use crate::experiments::{
    convert_saliency_dataset, cross_matrix, evaluate_predictions, fuse_dataset, sweep,
    write_report, DirSource, Jobs, SweepGrid,
};
use crate::fusion::{FusionConfig, DEFAULT_SALIENCY_THRESHOLD};
use crate::synthetic::{ActivationStyle, SyntheticConfig, SyntheticDataset};
use crate::types::MAX_CLASSES;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "psl-bench",
    version,
    about = "Pseudo label generation and evaluation harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Parallelism {
    /// Maximum number of worker threads [default: available parallelism]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: Option<u32>,
}

impl Parallelism {
    fn jobs(&self) -> Jobs {
        Jobs(self.jobs.map(|n| n as usize))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate pseudo label PNGs from activation maps and saliency maps.
    Fuse {
        /// Directory of <id>.actmap files
        #[arg(long)]
        actmaps: PathBuf,
        /// Directory of <id>.png saliency maps
        #[arg(long)]
        saliency: PathBuf,
        /// JSON-Lines manifest with "id" and "labels"
        #[arg(long)]
        manifest: PathBuf,
        /// Activation threshold in [0, 1]; values strictly above it are object cues
        #[arg(long, value_parser = parse_unit)]
        tau: f64,
        /// Output directory for <id>.png pseudo labels
        #[arg(long)]
        out: PathBuf,
        /// Saliency binarization cutoff in (0, 1), inclusive
        #[arg(long, default_value_t = DEFAULT_SALIENCY_THRESHOLD, value_parser = parse_open_unit)]
        saliency_thresh: f64,
        #[command(flatten)]
        parallel: Parallelism,
    },
    /// Evaluate pseudo labels over a grid of activation thresholds.
    Sweep {
        #[arg(long)]
        actmaps: PathBuf,
        #[arg(long)]
        saliency: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of <id>.png ground-truth label masks
        #[arg(long)]
        gt: PathBuf,
        /// Threshold grid START:STOP:STEP
        #[arg(long, default_value = "0.05:0.95:0.05", value_parser = parse_grid)]
        grid: SweepGrid,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SALIENCY_THRESHOLD, value_parser = parse_open_unit)]
        saliency_thresh: f64,
        #[command(flatten)]
        parallel: Parallelism,
    },
    /// Score existing label PNGs against ground truth.
    Eval {
        /// Directory of <id>.png predicted label masks
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Number of foreground classes
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=MAX_CLASSES as i64))]
        classes: u32,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        parallel: Parallelism,
    },
    /// Turn class-wise ground truth into saliency maps for a class subset.
    ConvertSaliency {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated class indices treated as salient
        #[arg(long)]
        keep_classes: String,
        /// Output directory for <id>.png saliency maps
        #[arg(long)]
        out: PathBuf,
        /// Number of foreground classes used to validate masks [default: 254]
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=MAX_CLASSES as i64))]
        classes: Option<u32>,
        #[command(flatten)]
        parallel: Parallelism,
    },
    /// Evaluate every method against every saliency source.
    Cross {
        /// Methods as name=DIR,... (activation map directories)
        #[arg(long)]
        methods: String,
        /// Saliency sources as name=DIR,...
        #[arg(long)]
        saliencies: String,
        /// Per-method thresholds as name=TAU,...
        #[arg(long)]
        taus: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SALIENCY_THRESHOLD, value_parser = parse_open_unit)]
        saliency_thresh: f64,
        #[command(flatten)]
        parallel: Parallelism,
    },
    /// Write a synthetic dataset (manifest, actmaps, saliency, gt).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, value_enum, default_value_t = Style::Sparse)]
        style: Style,
        /// Fraction of salient pixels turned non-salient
        #[arg(long, default_value_t = 0.0, value_parser = parse_unit)]
        saliency_flip: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Sparse,
    Saturated,
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn parse_grid(s: &str) -> Result<SweepGrid, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

/// Parses `name=value,name=value`; names must be unique and non-empty.
fn parse_named_list(flag: &str, s: &str) -> Result<Vec<(String, String)>, Failure> {
    let mut out: Vec<(String, String)> = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .filter(|(n, v)| !n.is_empty() && !v.is_empty())
            .ok_or_else(|| {
                Failure::Usage(format!("--{flag}: expected name=value, got {item:?}"))
            })?;
        if out.iter().any(|(n, _)| n == name) {
            return Err(Failure::Usage(format!("--{flag}: duplicate name {name:?}")));
        }
        out.push((name.to_string(), value.to_string()));
    }
    if out.is_empty() {
        return Err(Failure::Usage(format!("--{flag}: empty list")));
    }
    Ok(out)
}

fn parse_class_list(s: &str) -> Result<Vec<usize>, Failure> {
    let items: Vec<&str> = s
        .split(',')
        .map(str::trim)
        .filter(|i| !i.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Failure::Usage("--keep-classes: empty list".into()));
    }
    items
        .iter()
        .map(|i| {
            i.parse()
                .map_err(|_| Failure::Usage(format!("--keep-classes: not a class index: {i:?}")))
        })
        .collect()
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let say = |w: &mut dyn Write, line: String| {
        let _ = writeln!(w, "{line}");
    };
    match cli.command {
        Command::Fuse {
            actmaps,
            saliency,
            manifest,
            tau,
            out,
            saliency_thresh,
            parallel,
        } => {
            let config = FusionConfig::new(tau, saliency_thresh)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let manifest = read_manifest(&manifest)?;
            say(
                stderr,
                format!("fusing {} images at tau={tau}", manifest.len()),
            );
            let n = fuse_dataset(
                &manifest,
                &actmaps,
                &saliency,
                config,
                &out,
                parallel.jobs(),
            )?;
            say(stdout, format!("fused={n}"));
        }
        Command::Sweep {
            actmaps,
            saliency,
            manifest,
            gt,
            grid,
            out,
            saliency_thresh,
            parallel,
        } => {
            let manifest = read_manifest(&manifest)?;
            say(
                stderr,
                format!(
                    "sweeping {} thresholds over {} images",
                    grid.values().len(),
                    manifest.len()
                ),
            );
            let source = DirSource::new(&manifest, actmaps, saliency, gt);
            let result = sweep(&source, &grid, saliency_thresh, parallel.jobs())?;
            write_report(&result, &out)?;
            say(
                stdout,
                format!(
                    "best_tau={:.6} best_miou={:.6}",
                    result.best_tau, result.best_miou
                ),
            );
        }
        Command::Eval {
            pred,
            gt,
            manifest,
            classes,
            out,
            parallel,
        } => {
            let classes = classes as usize;
            let manifest = read_manifest_with_classes(&manifest, classes)?;
            say(stderr, format!("evaluating {} images", manifest.len()));
            let report = evaluate_predictions(&manifest, &pred, &gt, classes, parallel.jobs())?;
            write_report(&report, &out)?;
            say(stdout, format!("miou={:.6}", report.miou));
        }
        Command::ConvertSaliency {
            gt,
            manifest,
            keep_classes,
            out,
            classes,
            parallel,
        } => {
            let kept = parse_class_list(&keep_classes)?;
            let classes = classes.map_or(MAX_CLASSES, |c| c as usize);
            let subset =
                ClassSubset::new(kept, classes).map_err(|e| Failure::Usage(e.to_string()))?;
            let manifest = read_manifest(&manifest)?;
            say(stderr, format!("converting {} masks", manifest.len()));
            let n =
                convert_saliency_dataset(&manifest, &gt, &subset, classes, &out, parallel.jobs())?;
            say(stdout, format!("converted={n}"));
        }
        Command::Cross {
            methods,
            saliencies,
            taus,
            manifest,
            gt,
            out,
            saliency_thresh,
            parallel,
        } => {
            let to_paths = |v: Vec<(String, String)>| -> Vec<(String, PathBuf)> {
                v.into_iter().map(|(n, p)| (n, PathBuf::from(p))).collect()
            };
            let methods = to_paths(parse_named_list("methods", &methods)?);
            let saliencies = to_paths(parse_named_list("saliencies", &saliencies)?);
            let mut tau_map = HashMap::new();
            for (name, value) in parse_named_list("taus", &taus)? {
                let tau = parse_unit(&value)
                    .map_err(|e| Failure::Usage(format!("--taus {name}: {e}")))?;
                tau_map.insert(name, tau);
            }
            if let Some((m, _)) = methods.iter().find(|(m, _)| !tau_map.contains_key(m)) {
                return Err(Failure::Usage(format!(
                    "--taus has no entry for method {m:?}"
                )));
            }
            let manifest = read_manifest(&manifest)?;
            say(
                stderr,
                format!("evaluating {} x {} cells", methods.len(), saliencies.len()),
            );
            let matrix = cross_matrix(
                &methods,
                &saliencies,
                &manifest,
                &gt,
                &tau_map,
                saliency_thresh,
                parallel.jobs(),
            )?;
            write_report(&matrix, &out)?;
            say(
                stdout,
                format!("cells={}", methods.len() * saliencies.len()),
            );
        }
        Command::Synth {
            out,
            images,
            height,
            width,
            classes,
            style,
            saliency_flip,
            seed,
        } => {
            let dataset = SyntheticDataset::new(SyntheticConfig {
                images,
                height,
                width,
                class_count: classes,
                style: match style {
                    Style::Sparse => ActivationStyle::Sparse,
                    Style::Saturated => ActivationStyle::Saturated,
                },
                saliency_flip,
                seed,
            })
            .map_err(|e| Failure::Usage(e.to_string()))?;
            let dirs = dataset.write_to_dir(&out)?;
            say(stdout, format!("manifest={}", dirs.manifest.display()));
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(stdout, "{}", e.render());
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        EXIT_USAGE
                    } else {
                        EXIT_OK
                    }
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DATA
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_lists() {
        let v = parse_named_list("m", "cam=/a, drs=/b").ok().unwrap();
        assert_eq!(
            v,
            vec![("cam".into(), "/a".into()), ("drs".into(), "/b".into())]
        );
        assert!(parse_named_list("m", "cam").is_err());
        assert!(parse_named_list("m", "a=1,a=2").is_err());
        assert!(parse_named_list("m", "").is_err());
    }

    #[test]
    fn class_lists() {
        assert_eq!(parse_class_list("0, 4,2").ok().unwrap(), vec![0, 4, 2]);
        assert!(parse_class_list("").is_err());
        assert!(parse_class_list("x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
