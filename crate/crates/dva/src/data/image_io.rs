//! Reading photographs and reading/writing saliency maps.
//!
//! Saliency maps live in `[0, 1]` and are stored as 16-bit grayscale PNG by
//! default (8-bit on request); a `.pgm` extension selects binary PGM
//! instead. Reading is strict: a saliency file must be single-channel, since
//! silently collapsing color would hide a pipeline bug.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| Error::BadImage {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Loads any decodable image as a `(1, 3, h, w)` tensor in `[0, 1]`.
/// Grayscale sources are replicated across the three channels.
pub fn load_color(path: &Path) -> Result<Tensor4> {
    let img = decode(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut t = Tensor4::zeros(Shape4::new(1, 3, h, w));
    for c in 0..3 {
        let plane = t.plane_mut(0, c);
        for (i, px) in img.pixels().enumerate() {
            plane[i] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// Loads any decodable image as a `(1, 1, h, w)` grayscale tensor in
/// `[0, 1]`, converting color if needed (used for ground-truth maps and
/// image-form fixation records).
pub fn load_gray(path: &Path) -> Result<Tensor4> {
    let img = decode(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    Tensor4::new(Shape4::new(1, 1, h as usize, w as usize), data)
}

/// Bit depth for written saliency maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyDepth {
    Eight,
    Sixteen,
}

fn quantized(map: &Tensor4, path: &Path, levels: f64) -> Result<Vec<u64>> {
    let s = map.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape(format!("saliency map must be 1x1xHxW, got {s}")));
    }
    map.data()
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::BadImage {
                    path: path.to_path_buf(),
                    msg: format!("saliency value {v} outside [0, 1]"),
                });
            }
            Ok((v * levels).round() as u64)
        })
        .collect()
}

/// Writes a `(1, 1, h, w)` map in `[0, 1]`. Values are quantized with
/// `round(v * (2^depth - 1))`; the format follows the extension (`.pgm` for
/// binary PGM, PNG otherwise).
pub fn write_saliency(map: &Tensor4, path: &Path, depth: SaliencyDepth) -> Result<()> {
    let s = map.shape();
    let pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let io_err = |e: std::io::Error| Error::io(path, e);
    match depth {
        SaliencyDepth::Sixteen => {
            let raw: Vec<u16> = quantized(map, path, 65535.0)?
                .into_iter()
                .map(|v| v as u16)
                .collect();
            if pgm {
                let mut bytes = format!("P5\n{} {}\n65535\n", s.w, s.h).into_bytes();
                for v in &raw {
                    bytes.extend_from_slice(&v.to_be_bytes());
                }
                std::fs::write(path, bytes).map_err(io_err)
            } else {
                let img: ImageBuffer<Luma<u16>, _> =
                    ImageBuffer::from_raw(s.w as u32, s.h as u32, raw).unwrap();
                img.save_with_format(path, image::ImageFormat::Png)
                    .map_err(|e| Error::BadImage {
                        path: path.to_path_buf(),
                        msg: e.to_string(),
                    })
            }
        }
        SaliencyDepth::Eight => {
            let raw: Vec<u8> = quantized(map, path, 255.0)?
                .into_iter()
                .map(|v| v as u8)
                .collect();
            if pgm {
                let mut bytes = format!("P5\n{} {}\n255\n", s.w, s.h).into_bytes();
                bytes.extend_from_slice(&raw);
                std::fs::write(path, bytes).map_err(io_err)
            } else {
                let img: ImageBuffer<Luma<u8>, _> =
                    ImageBuffer::from_raw(s.w as u32, s.h as u32, raw).unwrap();
                img.save_with_format(path, image::ImageFormat::Png)
                    .map_err(|e| Error::BadImage {
                        path: path.to_path_buf(),
                        msg: e.to_string(),
                    })
            }
        }
    }
}

/// Reads a saliency map back as `(1, 1, h, w)` in `[0, 1]`. The file must
/// be single-channel grayscale.
pub fn read_saliency(path: &Path) -> Result<Tensor4> {
    let img = decode(path)?;
    let (data, w, h) = match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let d = g.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            (d, w, h)
        }
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            let d = g.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
            (d, w, h)
        }
        other => {
            return Err(Error::BadImage {
                path: path.to_path_buf(),
                msg: format!(
                    "expected grayscale saliency map, found {:?} pixels",
                    other.color()
                ),
            })
        }
    };
    Tensor4::new(Shape4::new(1, 1, h as usize, w as usize), data)
}

/// Writes a `(1, 3, h, w)` tensor in `[0, 1]` as an 8-bit RGB PNG (used by
/// the synthetic dataset generator).
pub fn write_rgb(image: &Tensor4, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Shape(format!("rgb image must be 1x3xHxW, got {s}")));
    }
    let mut raw = Vec::with_capacity(s.h * s.w * 3);
    for i in 0..s.h * s.w {
        for c in 0..3 {
            let v = image.plane(0, c)[i].clamp(0.0, 1.0);
            raw.push((v * 255.0).round() as u8);
        }
    }
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(s.w as u32, s.h as u32, raw).unwrap();
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::BadImage {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_map(h: usize, w: usize) -> Tensor4 {
        let data: Vec<f64> = (0..h * w).map(|i| i as f64 / (h * w - 1) as f64).collect();
        Tensor4::new(Shape4::new(1, 1, h, w), data).unwrap()
    }

    #[test]
    fn sixteen_bit_png_round_trip_is_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        let map = ramp_map(7, 9);
        write_saliency(&map, &path, SaliencyDepth::Sixteen).unwrap();
        let back = read_saliency(&path).unwrap();
        assert_eq!(back.shape(), map.shape());
        for (a, b) in map.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0, "{a} vs {b}");
        }
    }

    #[test]
    fn midpoint_quantizes_to_32768() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        let map = Tensor4::new(Shape4::new(1, 1, 1, 1), vec![0.5]).unwrap();
        write_saliency(&map, &path, SaliencyDepth::Sixteen).unwrap();
        let back = read_saliency(&path).unwrap();
        assert_eq!((back.data()[0] * 65535.0).round() as u32, 32768);
    }

    #[test]
    fn pgm_round_trip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        let map = ramp_map(5, 4);
        for (depth, tol) in [
            (SaliencyDepth::Sixteen, 0.5 / 65535.0),
            (SaliencyDepth::Eight, 0.5 / 255.0),
        ] {
            let path = dir.path().join("map.pgm");
            write_saliency(&map, &path, depth).unwrap();
            let back = read_saliency(&path).unwrap();
            for (a, b) in map.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= tol + 1e-12);
            }
        }
    }

    #[test]
    fn color_files_are_rejected_as_saliency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("color.png");
        let rgb = Tensor4::new(
            Shape4::new(1, 3, 2, 2),
            vec![0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.5, 0.5, 0.1, 0.9],
        )
        .unwrap();
        write_rgb(&rgb, &path).unwrap();
        let err = read_saliency(&path).unwrap_err();
        assert!(err.to_string().contains("grayscale"), "{err}");
    }

    #[test]
    fn out_of_range_values_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        let map = Tensor4::new(Shape4::new(1, 1, 1, 2), vec![0.5, 1.5]).unwrap();
        assert!(write_saliency(&map, &path, SaliencyDepth::Sixteen).is_err());
    }

    #[test]
    fn color_round_trip_through_load_color() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let rgb = Tensor4::new(
            Shape4::new(1, 3, 2, 2),
            vec![
                0.0, 1.0, 0.25, 0.75, 0.5, 0.5, 0.1, 0.9, 1.0, 0.0, 0.6, 0.4,
            ],
        )
        .unwrap();
        write_rgb(&rgb, &path).unwrap();
        let back = load_color(&path).unwrap();
        assert_eq!(back.shape(), rgb.shape());
        for (a, b) in rgb.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn missing_and_undecodable_files_give_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(read_saliency(&missing), Err(Error::Io { .. })));
        let garbage = dir.path().join("garbage.png");
        std::fs::write(&garbage, b"not an image at all").unwrap();
        assert!(matches!(
            read_saliency(&garbage),
            Err(Error::BadImage { .. })
        ));
    }
}
