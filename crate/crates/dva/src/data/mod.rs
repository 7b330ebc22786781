//! Dataset handling: manifests, image preparation, fixation records,
//! ground-truth maps and synthetic data.
//!
//! A dataset is described by a tab-separated manifest with one record per
//! line: `split<TAB>image<TAB>fixations[<TAB>ground_truth]`. Paths are
//! resolved relative to the manifest's directory, `#` starts a comment.
//! Fixation records are either a text file of 0-based `x y` (or `x,y`)
//! points or an image whose nonzero pixels mark fixated locations.
//!
//! Preparation scales the longer image side to `max_side`, rounds each side
//! down to a multiple of 16 (the network's pooling factor), normalizes
//! channels to `[0, 1]` minus a per-channel mean, and carries the fixations
//! along. Ground truth is loaded and peak-normalized when a file is given,
//! or synthesized by Gaussian-blurring the fixation points.

pub mod image_io;
pub mod resize;
pub mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub use image_io::{load_color, load_gray, read_saliency, write_saliency, SaliencyDepth};
pub use resize::{blur_plane, resize_plane, resize_tensor};
pub use synth::{synth_dataset, SynthConfig};

use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

/// Dataset split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (train, val or test)")),
        }
    }
}

/// One manifest line with paths already resolved.
#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub split: Split,
    pub image: PathBuf,
    pub fixations: PathBuf,
    pub ground_truth: Option<PathBuf>,
}

impl ManifestRecord {
    /// Image file stem; names predictions and log lines.
    pub fn id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.to_string_lossy().into_owned())
    }
}

/// Parses a manifest and verifies every referenced file exists. Problems are
/// reported with line numbers; missing files are all listed at once.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(parse_err(
                line_no,
                format!(
                    "expected 3 or 4 tab-separated columns (split, image, fixations[, ground truth]), got {}",
                    cols.len()
                ),
            ));
        }
        if cols[..3].iter().any(|c| c.is_empty()) {
            return Err(parse_err(line_no, "empty column".into()));
        }
        let split: Split = cols[0].parse().map_err(|e| parse_err(line_no, e))?;
        records.push(ManifestRecord {
            split,
            image: base.join(cols[1]),
            fixations: base.join(cols[2]),
            ground_truth: cols.get(3).filter(|c| !c.is_empty()).map(|c| base.join(c)),
        });
    }
    if records.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} contains no records",
            path.display()
        )));
    }
    let mut missing = Vec::new();
    for r in &records {
        for p in [Some(&r.image), Some(&r.fixations), r.ground_truth.as_ref()]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                missing.push(p.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} references {} missing file(s): {}",
            path.display(),
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(records)
}

/// Image preparation settings.
#[derive(Debug, Clone)]
pub struct DataConfig {
    /// The longer image side is scaled to this before rounding down to a
    /// multiple of 16.
    pub max_side: usize,
    /// Per-channel mean subtracted after scaling to `[0, 1]`.
    pub mean: [f64; 3],
    /// Blur width for synthesized ground truth; `None` picks
    /// `max(h, w) / 32` of the map being built.
    pub blur_sigma: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            max_side: 256,
            mean: [0.485, 0.456, 0.406],
            blur_sigma: None,
        }
    }
}

/// Working resolution for an image: longer side scaled to `max_side`
/// (integer arithmetic), both sides rounded down to a multiple of 16 and
/// floored at 16.
pub fn planned_dims(orig_h: usize, orig_w: usize, max_side: usize) -> (usize, usize) {
    assert!(orig_h > 0 && orig_w > 0 && max_side > 0);
    let longer = orig_h.max(orig_w);
    let sh = orig_h * max_side / longer;
    let sw = orig_w * max_side / longer;
    ((sh / 16 * 16).max(16), (sw / 16 * 16).max(16))
}

/// Maps a pixel coordinate between resolutions via pixel centers; identity
/// when the sizes match.
pub(crate) fn map_coord(v: usize, from: usize, to: usize) -> usize {
    (((v as f64 + 0.5) * to as f64 / from as f64).floor() as usize).min(to - 1)
}

/// Reads fixations in original-image coordinates. Text files hold 0-based
/// `x y` or `x,y` per line; anything else is decoded as an image whose
/// nonzero pixels are fixated. Returns `(y, x)` points.
pub(crate) fn load_fixations(path: &Path, orig_h: usize, orig_w: usize) -> Result<Vec<(usize, usize)>> {
    let is_text = path
        .extension()
        .is_some_and(|e| ["txt", "csv", "dat"].iter().any(|t| e.eq_ignore_ascii_case(t)));
    let mut points = Vec::new();
    if is_text {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|p| !p.is_empty())
                .collect();
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if parts.len() != 2 {
                return Err(err(format!("expected `x y`, got {line:?}")));
            }
            let x: f64 = parts[0]
                .parse()
                .map_err(|_| err(format!("bad x coordinate {:?}", parts[0])))?;
            let y: f64 = parts[1]
                .parse()
                .map_err(|_| err(format!("bad y coordinate {:?}", parts[1])))?;
            if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
                return Err(err(format!("negative or non-finite point ({x}, {y})")));
            }
            let (xi, yi) = (x.floor() as usize, y.floor() as usize);
            if xi >= orig_w || yi >= orig_h {
                return Err(err(format!(
                    "point ({xi}, {yi}) outside the {orig_w}x{orig_h} image"
                )));
            }
            points.push((yi, xi));
        }
    } else {
        let map = load_gray(path)?;
        let s = map.shape();
        if (s.h, s.w) != (orig_h, orig_w) {
            return Err(Error::Data(format!(
                "fixation map {} is {}x{} but the image is {orig_h}x{orig_w}",
                path.display(),
                s.h,
                s.w
            )));
        }
        for y in 0..s.h {
            for x in 0..s.w {
                if map.plane(0, 0)[y * s.w + x] > 0.0 {
                    points.push((y, x));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Data(format!(
            "fixation record {} contains no fixations",
            path.display()
        )));
    }
    Ok(points)
}

/// Builds a ground-truth map by dropping a unit impulse on every fixation
/// and Gaussian-blurring, then normalizing the peak to 1. `sigma` of `None`
/// uses the default width `max(h, w) / 32`.
pub fn synthesize_gt(
    points: &[(usize, usize)],
    h: usize,
    w: usize,
    sigma: Option<f64>,
) -> Result<Tensor4> {
    if points.is_empty() {
        return Err(Error::Data("cannot synthesize ground truth without fixations".into()));
    }
    let sigma = match sigma {
        Some(s) if !(s > 0.0 && s.is_finite()) => {
            return Err(Error::Config(format!("blur sigma must be positive, got {s}")));
        }
        Some(s) => s,
        None => h.max(w) as f64 / 32.0,
    };
    let mut plane = vec![0.0; h * w];
    for &(y, x) in points {
        if y >= h || x >= w {
            return Err(Error::Data(format!(
                "fixation ({y}, {x}) outside {h}x{w} map"
            )));
        }
        plane[y * w + x] += 1.0;
    }
    let blurred = blur_plane(&plane, h, w, sigma);
    let peak = blurred.iter().cloned().fold(f64::MIN, f64::max);
    if peak <= 0.0 {
        return Err(Error::Data("synthesized ground truth has no mass".into()));
    }
    let data = blurred.into_iter().map(|v| v / peak).collect();
    Tensor4::new(Shape4::new(1, 1, h, w), data)
}

/// A manifest record made ready for the network.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    /// `(1, 3, h, w)` normalized image at working resolution.
    pub image: Tensor4,
    /// `(1, 1, h, w)` target in `[0, 1]` with peak 1.
    pub gt: Tensor4,
    /// `(y, x)` fixations at working resolution, deduplicated.
    pub fixations: Vec<(usize, usize)>,
    /// `(h, w)` of the source image.
    pub original_dims: (usize, usize),
}

/// Loads and normalizes just the photograph; `predict` uses this directly.
/// Returns the tensor and the original `(h, w)`.
pub fn prepare_image(path: &Path, cfg: &DataConfig) -> Result<(Tensor4, (usize, usize))> {
    let raw = load_color(path)?;
    let s = raw.shape();
    let (h, w) = planned_dims(s.h, s.w, cfg.max_side);
    let mut resized = resize_tensor(&raw, h, w)?;
    for c in 0..3 {
        let mean = cfg.mean[c];
        for v in resized.plane_mut(0, c) {
            *v -= mean;
        }
    }
    Ok((resized, (s.h, s.w)))
}

/// Fully prepares one record: image, rescaled fixations and ground truth at
/// working resolution.
pub fn prepare_sample(record: &ManifestRecord, cfg: &DataConfig) -> Result<PreparedSample> {
    let (image, (orig_h, orig_w)) = prepare_image(&record.image, cfg)?;
    let s = image.shape();
    let raw_points = load_fixations(&record.fixations, orig_h, orig_w)?;
    let mapped: BTreeSet<(usize, usize)> = raw_points
        .iter()
        .map(|&(y, x)| (map_coord(y, orig_h, s.h), map_coord(x, orig_w, s.w)))
        .collect();
    let fixations: Vec<(usize, usize)> = mapped.into_iter().collect();
    let gt = match &record.ground_truth {
        Some(path) => {
            let raw = load_gray(path)?;
            let resized = resize_tensor(&raw, s.h, s.w)?;
            let peak = resized.data().iter().cloned().fold(f64::MIN, f64::max);
            if peak <= 0.0 {
                return Err(Error::Data(format!(
                    "ground truth {} has no mass",
                    path.display()
                )));
            }
            resized.map_unary(|v| (v / peak).clamp(0.0, 1.0))
        }
        None => synthesize_gt(&fixations, s.h, s.w, cfg.blur_sigma)?,
    };
    Ok(PreparedSample {
        id: record.id(),
        image,
        gt,
        fixations,
        original_dims: (orig_h, orig_w),
    })
}
