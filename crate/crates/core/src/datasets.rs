//! File formats and dataset conversion.
//!
//! Activation stacks live in `.actmap` files:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "WBED" (57 42 45 44)
//! 4       4     version, u32 LE (= 1)
//! 8       4     class count C, u32 LE
//! 12      4     height H, u32 LE
//! 16      4     width W, u32 LE
//! 20      4*CHW binary32 LE values, plane-major then row-major
//! ```
//!
//! Saliency maps and label masks are 8-bit single-channel PNGs. Palettized
//! label PNGs are read by palette index.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{ActivationStack, ImageLabelVector, LabelMask, SaliencyMap, IGNORE_LABEL};

pub const ACTMAP_MAGIC: [u8; 4] = *b"WBED";
pub const ACTMAP_VERSION: u32 = 1;
pub const ACTMAP_HEADER_LEN: usize = 20;

pub const ACTMAP_EXT: &str = "actmap";
pub const PNG_EXT: &str = "png";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes an activation stack into `.actmap` bytes.
pub fn encode_actmap(a: &ActivationStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(ACTMAP_HEADER_LEN + 4 * a.planes().len());
    out.extend_from_slice(&ACTMAP_MAGIC);
    for v in [
        ACTMAP_VERSION,
        a.class_count() as u32,
        a.height() as u32,
        a.width() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in a.planes() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parses `.actmap` bytes.
pub fn decode_actmap(bytes: &[u8]) -> Result<ActivationStack> {
    let truncated = |expected: u64| Error::TruncatedFile {
        expected,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(ACTMAP_HEADER_LEN as u64));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != ACTMAP_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 8 {
        return Err(truncated(ACTMAP_HEADER_LEN as u64));
    }
    let version = u32_at(bytes, 4);
    if version != ACTMAP_VERSION {
        return Err(Error::BadVersion(version));
    }
    if bytes.len() < ACTMAP_HEADER_LEN {
        return Err(truncated(ACTMAP_HEADER_LEN as u64));
    }
    let (c, h, w) = (u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16));
    let expected = ACTMAP_HEADER_LEN as u128 + 4 * c as u128 * h as u128 * w as u128;
    let actual = bytes.len() as u128;
    if actual < expected {
        return Err(truncated(expected.min(u64::MAX as u128) as u64));
    }
    if actual > expected {
        return Err(Error::TrailingData((actual - expected) as u64));
    }
    let planes = bytes[ACTMAP_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ActivationStack::new(c as usize, h as usize, w as usize, planes)
}

pub fn read_actmap(path: impl AsRef<Path>) -> Result<ActivationStack> {
    decode_actmap(&read_file(path.as_ref())?)
}

pub fn write_actmap(a: &ActivationStack, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_actmap(a))
}

struct RawPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8]) -> Result<RawPng> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedPngFormat("image too large".into()))?;
    let mut data = vec![0; size];
    let frame = reader.next_frame(&mut data)?;
    data.truncate(frame.buffer_size());
    Ok(RawPng {
        width: frame.width as usize,
        height: frame.height as usize,
        color,
        depth,
        data,
    })
}

fn single_channel_8bit(raw: &RawPng, allow_indexed: bool) -> Result<()> {
    let color_ok = raw.color == png::ColorType::Grayscale
        || (allow_indexed && raw.color == png::ColorType::Indexed);
    if !color_ok || raw.depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPngFormat(format!(
            "{:?} at {:?} bits",
            raw.color, raw.depth
        )));
    }
    Ok(())
}

fn encode_gray_png(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Decodes an 8-bit grayscale PNG as a soft saliency map (`v / 255`).
pub fn decode_gray_png(bytes: &[u8]) -> Result<SaliencyMap> {
    let raw = decode_png(bytes)?;
    single_channel_8bit(&raw, false)?;
    let values = raw.data.iter().map(|&v| v as f32 / 255.0).collect();
    SaliencyMap::soft(raw.height, raw.width, values)
}

pub fn read_gray_png(path: impl AsRef<Path>) -> Result<SaliencyMap> {
    decode_gray_png(&read_file(path.as_ref())?)
}

/// Writes a saliency map as 8-bit grayscale, `round(255 v)`.
pub fn write_gray_png(s: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = s
        .values()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    write_file(
        path.as_ref(),
        &encode_gray_png(s.width(), s.height(), &data)?,
    )
}

pub fn decode_label_png(bytes: &[u8], class_count: usize) -> Result<LabelMask> {
    let raw = decode_png(bytes)?;
    single_channel_8bit(&raw, true)?;
    LabelMask::new(raw.height, raw.width, class_count, raw.data)
}

pub fn encode_label_png(mask: &LabelMask) -> Result<Vec<u8>> {
    encode_gray_png(mask.width(), mask.height(), mask.values())
}

/// Reads a label mask, validating codes against `class_count`.
pub fn read_label_png(path: impl AsRef<Path>, class_count: usize) -> Result<LabelMask> {
    decode_label_png(&read_file(path.as_ref())?, class_count)
}

/// Writes a label mask as an 8-bit grayscale PNG holding the raw codes.
pub fn write_label_png(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_label_png(mask)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Present class indices, `0..C`.
    pub labels: Vec<usize>,
}

impl ManifestEntry {
    pub fn label_vector(&self, class_count: usize) -> Result<ImageLabelVector> {
        ImageLabelVector::from_indices(class_count, &self.labels)
    }
}

/// Image ids with their image-level class labels, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    id: String,
    labels: Vec<i64>,
}

impl Manifest {
    /// Parses JSON-Lines text. Blank lines are skipped. When `class_count`
    /// is given every label must be below it.
    pub fn parse(reader: impl BufRead, class_count: Option<usize>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawEntry = serde_json::from_str(&line).map_err(|e| Error::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
            if !seen.insert(raw.id.clone()) {
                return Err(Error::DuplicateId {
                    id: raw.id,
                    line: line_no,
                });
            }
            let bound = class_count.unwrap_or(crate::types::MAX_CLASSES);
            let labels = raw
                .labels
                .iter()
                .map(|&l| {
                    if l < 0 || l as u64 >= bound as u64 {
                        Err(Error::LabelOutOfRange {
                            label: l,
                            class_count: bound,
                        })
                    } else {
                        Ok(l as usize)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(ManifestEntry { id: raw.id, labels });
        }
        Ok(Self { entries })
    }

    pub fn check_class_count(&self, class_count: usize) -> Result<()> {
        for e in &self.entries {
            if let Some(&l) = e.labels.iter().find(|&&l| l >= class_count) {
                return Err(Error::LabelOutOfRange {
                    label: l as i64,
                    class_count,
                }
                .for_sample(&e.id));
            }
        }
        Ok(())
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            let line = serde_json::json!({ "id": e.id, "labels": e.labels });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads a JSON-Lines manifest without a class bound beyond the label-code
/// limit.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(BufReader::new(file), None)
}

pub fn read_manifest_with_classes(path: impl AsRef<Path>, class_count: usize) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(BufReader::new(file), Some(class_count))
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    m.write(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Set of class indices treated as salient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSubset {
    kept: BTreeSet<usize>,
}

impl ClassSubset {
    pub fn new(kept: impl IntoIterator<Item = usize>, class_count: usize) -> Result<Self> {
        let kept: BTreeSet<usize> = kept.into_iter().collect();
        if kept.is_empty() {
            return Err(Error::EmptySubset);
        }
        if let Some(&c) = kept.iter().find(|&&c| c >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: c as i64,
                class_count,
            });
        }
        Ok(Self { kept })
    }

    pub fn all(class_count: usize) -> Self {
        Self {
            kept: (0..class_count).collect(),
        }
    }

    pub fn contains(&self, class: usize) -> bool {
        self.kept.contains(&class)
    }
}

/// Converts a class-wise mask into a binary saliency map that is salient
/// only on pixels of the kept classes.
pub fn classwise_to_salient(gt: &LabelMask, subset: &ClassSubset) -> SaliencyMap {
    let mut lut = [0.0f32; 256];
    for (code, slot) in lut
        .iter_mut()
        .enumerate()
        .take(gt.class_count() + 1)
        .skip(1)
    {
        if subset.contains(code - 1) {
            *slot = 1.0;
        }
    }
    lut[IGNORE_LABEL as usize] = 0.0;
    let values = gt.values().iter().map(|&v| lut[v as usize]).collect();
    SaliencyMap::binary(gt.height(), gt.width(), values).expect("lut values are binary")
}

/// `<root>/<id>.<ext>`
pub fn sample_path(root: &Path, id: &str, ext: &str) -> PathBuf {
    root.join(format!("{id}.{ext}"))
}

/// Like [`sample_path`], but a missing file is a [`Error::MissingFile`].
pub fn existing_sample_path(root: &Path, id: &str, ext: &str) -> Result<PathBuf> {
    let path = sample_path(root, id, ext);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingFile {
            id: id.to_string(),
            path,
        })
    }
}
