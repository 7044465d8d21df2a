//! 16-bit raster input: binary PGM reading and writing, the `ln(1 + v)`
//! intensity transform, non-overlapping square tiling, and per-feature
//! standardization fitted on training data.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampler::Dataset;

/// Default patch edge in pixels.
pub const PATCH_SIZE: usize = 160;
/// Ground distance covered by one pixel, in metres.
pub const PIXEL_SPACING_M: f64 = 1.25;

/// Row-major 16-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u16>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, values: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} image",
                values.len()
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            values,
        })
    }
}

/// Row-major real-valued image.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("PGM header: missing or invalid {what}")))
    }
}

/// Decodes a binary (`P5`) PGM. Samples are one byte when `maxval <= 255`,
/// otherwise two bytes, most significant first.
pub fn parse_pgm16(bytes: &[u8]) -> Result<ImageGrid> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::UnsupportedFormat(format!(
            "magic {magic:?}, expected binary PGM \"P5\""
        )));
    }
    let mut header = HeaderReader { bytes, pos: 2 };
    let width = header.number("width")? as usize;
    let height = header.number("height")? as usize;
    let maxval = header.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(Error::BadMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(header.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Parse("PGM header not terminated by whitespace".into()));
    }
    let payload = &bytes[header.pos + 1..];
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let expected = width * height * sample_bytes;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let values = if sample_bytes == 2 {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        payload[..expected].iter().map(|&b| u16::from(b)).collect()
    };
    ImageGrid::new(width, height, values)
}

pub fn read_pgm16(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm16(&bytes)
}

/// Encodes `img` as a 16-bit `P5` PGM with maxval 65535.
pub fn encode_pgm16(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.values.len() * 2);
    for v in &img.values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm16(img: &ImageGrid, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm16(img)).map_err(|e| Error::io(path, e))
}

/// Elementwise `ln(1 + v)`; maps `[0, 65535]` onto `[0, ln 65536]`.
pub fn log_transform(img: &ImageGrid) -> RealGrid {
    RealGrid {
        width: img.width,
        height: img.height,
        values: img.values.iter().map(|&v| f64::from(v).ln_1p()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin_x: usize,
    pub origin_y: usize,
    /// Row-major pixels of the patch.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub patches: Vec<Patch>,
    /// Set when the image could not hold a single patch.
    pub too_small: bool,
}

impl PatchSet {
    /// Edge length of one patch on the ground, in metres.
    pub fn ground_extent_m(&self) -> f64 {
        self.patch_size as f64 * PIXEL_SPACING_M
    }
}

/// Non-overlapping `patch_size × patch_size` tiles in row-major order.
/// Pixels right of or below the last full tile are dropped.
pub fn tile(img: &RealGrid, patch_size: usize) -> Result<PatchSet> {
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let cols = img.width / patch_size;
    let rows = img.height / patch_size;
    let mut patches = Vec::with_capacity(rows * cols);
    for ty in 0..rows {
        for tx in 0..cols {
            let (ox, oy) = (tx * patch_size, ty * patch_size);
            let mut values = Vec::with_capacity(patch_size * patch_size);
            for y in oy..oy + patch_size {
                let start = y * img.width + ox;
                values.extend_from_slice(&img.values[start..start + patch_size]);
            }
            patches.push(Patch {
                origin_x: ox,
                origin_y: oy,
                values,
            });
        }
    }
    Ok(PatchSet {
        patch_size,
        too_small: patches.is_empty(),
        patches,
    })
}

/// Parses a patch label sidecar: one `origin_x,origin_y,label` line per patch.
pub fn parse_label_sidecar(text: &str) -> Result<HashMap<(usize, usize), usize>> {
    let mut labels = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<usize> = line
            .split(',')
            .map(|f| f.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("label line {}: {e}", i + 1)))?;
        let [x, y, label] = fields[..] else {
            return Err(Error::Parse(format!(
                "label line {}: expected origin_x,origin_y,label",
                i + 1
            )));
        };
        if labels.insert((x, y), label).is_some() {
            return Err(Error::Parse(format!(
                "label line {}: duplicate origin ({x}, {y})",
                i + 1
            )));
        }
    }
    Ok(labels)
}

/// Pairs tiles with sidecar labels. Unlabelled tiles are skipped; a label
/// whose origin matches no tile is an error.
pub fn labelled_patches(
    patches: &PatchSet,
    labels: &HashMap<(usize, usize), usize>,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for p in &patches.patches {
        if let Some(&y) = labels.get(&(p.origin_x, p.origin_y)) {
            rows.push(p.values.clone());
            ys.push(y);
        }
    }
    if ys.len() != labels.len() {
        let tiles: std::collections::HashSet<_> =
            patches.patches.iter().map(|p| (p.origin_x, p.origin_y)).collect();
        let stray = labels.keys().find(|k| !tiles.contains(k)).expect("unmatched label");
        return Err(Error::Parse(format!(
            "label for origin {stray:?} matches no full patch"
        )));
    }
    Ok((rows, ys))
}

/// Per-feature affine map to zero mean and unit variance, fitted on training
/// rows. Zero-variance features map to 0. Applying it twice is not the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 0 marks a constant feature.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardization needs at least 2 rows, got {}",
                train.rows()
            )));
        }
        let n = train.rows() as f64;
        let mut mean = vec![0.0; train.cols()];
        for row in train.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; train.cols()];
        for row in train.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "{} features, standardizer fitted on {}",
                x.cols(),
                self.mean.len()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        Ok(out)
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let features = self.apply(ds.features())?;
        ds.map_features(|_| features)
    }
}

/// Fits on `train` and returns the fitted map with the transformed rows.
pub fn standardize(train: &Matrix) -> Result<(Standardizer, Matrix)> {
    let s = Standardizer::fit(train)?;
    let applied = s.apply(train)?;
    Ok((s, applied))
}
