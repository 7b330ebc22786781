//! Synthetic dataset generation: noisy backgrounds with a few bright blobs,
//! where the blob centers double as the recorded fixations. Output is fully
//! determined by the seed, down to the file bytes, which the determinism
//! tests rely on.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::image_io::write_rgb;
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub count: usize,
    /// `(h, w)` of every generated image.
    pub dims: (usize, usize),
    pub blobs_per_image: usize,
    /// Fraction of images assigned to the `val` split (rounded, always
    /// leaving at least one training image).
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 8,
            dims: (64, 64),
            blobs_per_image: 3,
            val_fraction: 0.25,
            seed: 1,
        }
    }
}

/// Generates `cfg.count` images under `dir` (`images/`, `fixations/`) and
/// writes `manifest.tsv` tying them together; returns the manifest path.
/// Ground truth is left to the loader, which synthesizes it from the
/// fixations.
pub fn synth_dataset(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    let (h, w) = cfg.dims;
    if cfg.count == 0 || h < 16 || w < 16 || cfg.blobs_per_image == 0 {
        return Err(Error::Config(format!(
            "synthetic dataset needs count > 0, dims of at least 16 and blobs > 0; \
             got count {}, {}x{}, {} blobs",
            cfg.count, h, w, cfg.blobs_per_image
        )));
    }
    if !(0.0..=1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config(format!(
            "val fraction {} outside [0, 1]",
            cfg.val_fraction
        )));
    }
    let images_dir = dir.join("images");
    let fix_dir = dir.join("fixations");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::create_dir_all(&fix_dir).map_err(|e| Error::io(&fix_dir, e))?;

    let n_val = ((cfg.count as f64 * cfg.val_fraction).round() as usize).min(cfg.count - 1);
    let mut rng = Rng::new(cfg.seed);
    let mut manifest = String::new();
    manifest.push_str("# synthetic dataset: split\timage\tfixations\n");
    for i in 0..cfg.count {
        let mut image = Tensor4::zeros(Shape4::new(1, 3, h, w));
        // Dim noise floor so the background is never flat.
        for c in 0..3 {
            for v in image.plane_mut(0, c) {
                *v = 0.2 + 0.1 * rng.next_f64();
            }
        }
        // Bright Gaussian blobs; centers are the fixations.
        let margin = (h.min(w) / 8).max(2);
        let mut centers = BTreeSet::new();
        for _ in 0..cfg.blobs_per_image {
            let cy = margin + rng.next_below(h - 2 * margin);
            let cx = margin + rng.next_below(w - 2 * margin);
            let radius = (h.min(w) as f64 / 10.0) * (1.0 + rng.next_f64());
            let color = [
                0.5 + 0.5 * rng.next_f64(),
                0.5 + 0.5 * rng.next_f64(),
                0.5 + 0.5 * rng.next_f64(),
            ];
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
                    let g = (-d2 / (2.0 * (radius / 2.0).powi(2))).exp();
                    if g > 1e-4 {
                        for c in 0..3 {
                            image.plane_mut(0, c)[y * w + x] += 0.6 * color[c] * g;
                        }
                    }
                }
            }
            centers.insert((cy, cx));
        }
        let clipped = image.map_unary(|v| v.clamp(0.0, 1.0));

        let name = format!("img_{i:03}");
        write_rgb(&clipped, &images_dir.join(format!("{name}.png")))?;
        let mut fix_text = String::new();
        for &(cy, cx) in &centers {
            writeln!(fix_text, "{cx} {cy}").unwrap();
        }
        let fix_path = fix_dir.join(format!("{name}.txt"));
        std::fs::write(&fix_path, fix_text).map_err(|e| Error::io(&fix_path, e))?;

        let split = if i < cfg.count - n_val { "train" } else { "val" };
        writeln!(
            manifest,
            "{split}\timages/{name}.png\tfixations/{name}.txt"
        )
        .unwrap();
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_the_advertised_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            count: 4,
            dims: (32, 48),
            ..Default::default()
        };
        let manifest = synth_dataset(dir.path(), &cfg).unwrap();
        let text = std::fs::read_to_string(&manifest).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("train\t"));
        assert!(lines[3].starts_with("val\t"));
        for line in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 3);
            assert!(dir.path().join(cols[1]).exists());
            assert!(dir.path().join(cols[2]).exists());
        }
    }

    #[test]
    fn output_bytes_are_seed_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            count: 2,
            dims: (32, 32),
            ..Default::default()
        };
        synth_dataset(a.path(), &cfg).unwrap();
        synth_dataset(b.path(), &cfg).unwrap();
        let other = SynthConfig { seed: 2, ..cfg };
        synth_dataset(c.path(), &other).unwrap();
        let img = "images/img_001.png";
        assert_eq!(
            std::fs::read(a.path().join(img)).unwrap(),
            std::fs::read(b.path().join(img)).unwrap()
        );
        assert_ne!(
            std::fs::read(a.path().join(img)).unwrap(),
            std::fs::read(c.path().join(img)).unwrap()
        );
    }

    #[test]
    fn fixations_are_inside_the_image() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            count: 3,
            dims: (32, 64),
            blobs_per_image: 5,
            ..Default::default()
        };
        synth_dataset(dir.path(), &cfg).unwrap();
        for i in 0..3 {
            let text =
                std::fs::read_to_string(dir.path().join(format!("fixations/img_{i:03}.txt")))
                    .unwrap();
            let mut count = 0;
            for line in text.lines() {
                let mut it = line.split_whitespace();
                let x: usize = it.next().unwrap().parse().unwrap();
                let y: usize = it.next().unwrap().parse().unwrap();
                assert!(x < 64 && y < 32, "({x},{y})");
                count += 1;
            }
            assert!(count >= 1 && count <= 5);
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = SynthConfig {
            count: 0,
            ..Default::default()
        };
        assert!(synth_dataset(dir.path(), &bad).is_err());
        let bad = SynthConfig {
            dims: (8, 64),
            ..Default::default()
        };
        assert!(synth_dataset(dir.path(), &bad).is_err());
    }
}
