//! Dataset generation and ingestion: the synthetic input distributions used
//! throughout the experiments plus an IDX-format image loader with
//! average-pool downscaling (28x28 -> 14x14 and friends).

use crate::kernels::Dataset;
use crate::widenet::standard_normal;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Uniform on the unit ball in `n0` dimensions.
    Disk,
    /// Uniform on the unit sphere.
    Circle,
    /// iid standard normal coordinates.
    Gaussian,
    /// IDX image file (MNIST layout).
    Idx,
}

/// How labels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// Random regression targets, iid N(0,1), `n_out` per example.
    Gauss { n_out: usize },
    /// Random ±1 classes (synthetic) or digit parity mapped to ±1 (IDX).
    PlusMinus,
    /// Class indices: random in `0..classes` (synthetic) or the raw digit
    /// (IDX), stored as a single real per example.
    ClassIndex { classes: usize },
    /// One-hot encoding of the class.
    OneHot { classes: usize },
}

/// Pixel post-processing for image sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelScaling {
    /// Scale to [0, 1] (the default).
    Unit,
    /// Scale to [0, 1], then standardize over the whole loaded set.
    Standardize,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub source: SourceKind,
    pub n: usize,
    /// Input dimension for the synthetic sources.
    pub n0: usize,
    pub seed: u64,
    pub label_rule: LabelRule,
    /// Image file for [`SourceKind::Idx`].
    pub images_path: Option<PathBuf>,
    /// Label file for [`SourceKind::Idx`].
    pub labels_path: Option<PathBuf>,
    /// Average-pooling factor; must divide both image sides.
    pub downscale: usize,
    pub pixel_scaling: PixelScaling,
}

impl DataConfig {
    pub fn synthetic(source: SourceKind, n: usize, n0: usize, seed: u64, label_rule: LabelRule) -> Self {
        DataConfig {
            source,
            n,
            n0,
            seed,
            label_rule,
            images_path: None,
            labels_path: None,
            downscale: 1,
            pixel_scaling: PixelScaling::Unit,
        }
    }
}

/// Builds the dataset described by `config`, deterministically per seed.
pub fn generate(config: &DataConfig) -> Result<Dataset> {
    if config.n < 1 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    match config.source {
        SourceKind::Idx => load_idx(config),
        _ => synthesize(config),
    }
}

fn synthesize(config: &DataConfig) -> Result<Dataset> {
    if config.n0 < 1 {
        return Err(Error::Config("synthetic sources need n0 >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n0 = config.n0;
    let mut inputs = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let mut v: Vec<f64> = (0..n0).map(|_| standard_normal(&mut rng)).collect();
        match config.source {
            SourceKind::Disk => {
                crate::linalg::normalize(&mut v);
                let r = rng.gen::<f64>().powf(1.0 / n0 as f64);
                for x in &mut v {
                    *x *= r;
                }
            }
            SourceKind::Circle => {
                crate::linalg::normalize(&mut v);
            }
            SourceKind::Gaussian => {}
            SourceKind::Idx => unreachable!(),
        }
        inputs.push(v);
    }
    let labels = synthesize_labels(&config.label_rule, config.n, &mut rng)?;
    Dataset::new(inputs, Some(labels))
}

fn synthesize_labels(
    rule: &LabelRule,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    match rule {
        LabelRule::Gauss { n_out } => {
            if *n_out < 1 {
                return Err(Error::Config("label dimension must be >= 1".into()));
            }
            Ok((0..n)
                .map(|_| (0..*n_out).map(|_| standard_normal(rng)).collect())
                .collect())
        }
        LabelRule::PlusMinus => {
            Ok((0..n).map(|_| vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }]).collect())
        }
        LabelRule::ClassIndex { classes } => {
            if *classes < 2 {
                return Err(Error::Config("class labels need >= 2 classes".into()));
            }
            Ok((0..n).map(|_| vec![rng.gen_range(0..*classes) as f64]).collect())
        }
        LabelRule::OneHot { classes } => {
            if *classes < 2 {
                return Err(Error::Config("one-hot labels need >= 2 classes".into()));
            }
            Ok((0..n)
                .map(|_| {
                    let c = rng.gen_range(0..*classes);
                    (0..*classes).map(|k| if k == c { 1.0 } else { 0.0 }).collect()
                })
                .collect())
        }
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Ingest { offset, msg: "unexpected end of file".into() })
}

/// Raw IDX image block: `count` images of `rows x cols` bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Ingest {
            offset: 0,
            msg: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Ingest {
            offset: bytes.len(),
            msg: format!("image payload truncated: need {need} bytes"),
        });
    }
    Ok((count, rows, cols, &bytes[16..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Ingest {
            offset: 0,
            msg: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::Ingest {
            offset: bytes.len(),
            msg: format!("label payload truncated: need {need} bytes"),
        });
    }
    Ok(&bytes[8..need])
}

/// `factor x factor` average pooling; exact mean preservation.
pub fn downscale(image: &[f64], rows: usize, cols: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || rows % factor != 0 || cols % factor != 0 {
        return Err(Error::Config(format!(
            "downscale factor {factor} does not divide image sides {rows}x{cols}"
        )));
    }
    let (out_r, out_c) = (rows / factor, cols / factor);
    let mut out = vec![0.0; out_r * out_c];
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..out_r {
        for c in 0..out_c {
            let mut acc = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += image[(r * factor + dr) * cols + (c * factor + dc)];
                }
            }
            out[r * out_c + c] = acc * inv;
        }
    }
    Ok(out)
}

fn load_idx(config: &DataConfig) -> Result<Dataset> {
    let images_path = config
        .images_path
        .as_ref()
        .ok_or_else(|| Error::Config("idx source needs an images path".into()))?;
    let bytes = std::fs::read(images_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&bytes)?;
    if config.n > count {
        return Err(Error::Config(format!(
            "requested {} examples but the file holds {count}",
            config.n
        )));
    }
    let mut inputs = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let raw = &pixels[i * rows * cols..(i + 1) * rows * cols];
        let scaled: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();
        inputs.push(downscale(&scaled, rows, cols, config.downscale)?);
    }
    if config.pixel_scaling == PixelScaling::Standardize {
        let dim = inputs[0].len();
        let total = (config.n * dim) as f64;
        let mean: f64 = inputs.iter().flatten().sum::<f64>() / total;
        let var: f64 =
            inputs.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / total;
        let sd = var.sqrt().max(1e-12);
        for img in &mut inputs {
            for v in img.iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
    }

    let labels = match &config.labels_path {
        None => None,
        Some(path) => {
            let lbytes = std::fs::read(path)?;
            let raw = parse_idx_labels(&lbytes)?;
            if raw.len() < config.n {
                return Err(Error::Ingest {
                    offset: 8 + raw.len(),
                    msg: format!("label file holds {} labels, need {}", raw.len(), config.n),
                });
            }
            let mapped: Result<Vec<Vec<f64>>> = raw[..config.n]
                .iter()
                .map(|&digit| match config.label_rule {
                    LabelRule::PlusMinus => {
                        Ok(vec![if digit % 2 == 0 { 1.0 } else { -1.0 }])
                    }
                    LabelRule::ClassIndex { classes } => {
                        if (digit as usize) < classes {
                            Ok(vec![digit as f64])
                        } else {
                            Err(Error::Config(format!(
                                "digit {digit} out of range for {classes} classes"
                            )))
                        }
                    }
                    LabelRule::OneHot { classes } => {
                        if (digit as usize) < classes {
                            Ok((0..classes)
                                .map(|k| if k == digit as usize { 1.0 } else { 0.0 })
                                .collect())
                        } else {
                            Err(Error::Config(format!(
                                "digit {digit} out of range for {classes} classes"
                            )))
                        }
                    }
                    LabelRule::Gauss { .. } => Err(Error::Config(
                        "gaussian label rule does not apply to idx sources".into(),
                    )),
                })
                .collect();
            Some(mapped?)
        }
    };
    Dataset::new(inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_image_bytes(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&(rows as u32).to_be_bytes());
        bytes.extend_from_slice(&(cols as u32).to_be_bytes());
        for img in images {
            bytes.extend_from_slice(img);
        }
        bytes
    }

    fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        bytes
    }

    #[test]
    fn disk_points_stay_in_the_ball() {
        let config = DataConfig::synthetic(
            SourceKind::Disk,
            1000,
            2,
            7,
            LabelRule::Gauss { n_out: 1 },
        );
        let data = generate(&config).unwrap();
        let mut inside_half = 0usize;
        for x in &data.inputs {
            let norm = crate::linalg::norm2(x);
            assert!(norm <= 1.0 + 1e-12);
            if norm <= 0.5 {
                inside_half += 1;
            }
        }
        // Area ratio 1/4; binomial 3-sigma band around 250 of 1000.
        let sd = (1000.0f64 * 0.25 * 0.75).sqrt();
        assert!(
            (inside_half as f64 - 250.0).abs() < 3.0 * sd,
            "{inside_half} points inside radius 1/2"
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let config = DataConfig::synthetic(
            SourceKind::Gaussian,
            10,
            3,
            99,
            LabelRule::Gauss { n_out: 2 },
        );
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn circle_points_are_unit_norm() {
        let config =
            DataConfig::synthetic(SourceKind::Circle, 50, 4, 3, LabelRule::PlusMinus);
        let data = generate(&config).unwrap();
        for x in &data.inputs {
            assert!((crate::linalg::norm2(x) - 1.0).abs() < 1e-12);
        }
        for y in data.labels.as_ref().unwrap() {
            assert!(y[0] == 1.0 || y[0] == -1.0);
        }
    }

    #[test]
    fn idx_fixture_roundtrip() {
        // Four hand-written 4x4 images: pixel value = image index * 16 + cell.
        let rows = 4;
        let cols = 4;
        let images: Vec<Vec<u8>> = (0..4u8)
            .map(|i| (0..16u8).map(|c| i * 16 + c).collect())
            .collect();
        let labels = [3u8, 1, 4, 7];
        let dir = tempfile::tempdir().unwrap();
        let ipath = dir.path().join("images.idx");
        let lpath = dir.path().join("labels.idx");
        std::fs::write(&ipath, idx_image_bytes(&images, rows, cols)).unwrap();
        std::fs::write(&lpath, idx_label_bytes(&labels)).unwrap();

        let config = DataConfig {
            source: SourceKind::Idx,
            n: 4,
            n0: 0,
            seed: 0,
            label_rule: LabelRule::ClassIndex { classes: 10 },
            images_path: Some(ipath),
            labels_path: Some(lpath),
            downscale: 1,
            pixel_scaling: PixelScaling::Unit,
        };
        let data = generate(&config).unwrap();
        assert_eq!(data.n0, 16);
        for (i, img) in data.inputs.iter().enumerate() {
            for (c, v) in img.iter().enumerate() {
                let expect = (i * 16 + c) as f64 / 255.0;
                assert_eq!(*v, expect, "pixel roundtrip at image {i} cell {c}");
            }
        }
        let got: Vec<f64> = data.labels.unwrap().iter().map(|l| l[0]).collect();
        assert_eq!(got, vec![3.0, 1.0, 4.0, 7.0]);
    }

    #[test]
    fn parity_labels_from_digits() {
        let dir = tempfile::tempdir().unwrap();
        let ipath = dir.path().join("images.idx");
        let lpath = dir.path().join("labels.idx");
        let images: Vec<Vec<u8>> = (0..3).map(|_| vec![128u8; 4]).collect();
        std::fs::write(&ipath, idx_image_bytes(&images, 2, 2)).unwrap();
        std::fs::write(&lpath, idx_label_bytes(&[0, 5, 8])).unwrap();
        let config = DataConfig {
            source: SourceKind::Idx,
            n: 3,
            n0: 0,
            seed: 0,
            label_rule: LabelRule::PlusMinus,
            images_path: Some(ipath),
            labels_path: Some(lpath),
            downscale: 1,
            pixel_scaling: PixelScaling::Unit,
        };
        let data = generate(&config).unwrap();
        let got: Vec<f64> = data.labels.unwrap().iter().map(|l| l[0]).collect();
        assert_eq!(got, vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn downscale_of_constant_image_is_constant_and_mean_preserving() {
        let image = vec![0.3; 28 * 28];
        let down = downscale(&image, 28, 28, 2).unwrap();
        assert_eq!(down.len(), 14 * 14);
        assert!(down.iter().all(|&v| (v - 0.3).abs() < 1e-15));

        // Mean preservation on a non-constant image.
        let varied: Vec<f64> = (0..28 * 28).map(|i| (i % 7) as f64).collect();
        let down2 = downscale(&varied, 28, 28, 2).unwrap();
        let mean_before: f64 = varied.iter().sum::<f64>() / varied.len() as f64;
        let mean_after: f64 = down2.iter().sum::<f64>() / down2.len() as f64;
        assert!((mean_before - mean_after).abs() < 1e-12);

        assert!(downscale(&image, 28, 28, 3).is_err());
    }

    #[test]
    fn malformed_idx_magic_names_the_offset() {
        let mut bytes = idx_image_bytes(&[vec![0u8; 4]], 2, 2);
        bytes[2] = 0xff;
        match parse_idx_images(&bytes) {
            Err(crate::Error::Ingest { offset: 0, .. }) => {}
            other => panic!("expected ingest error at offset 0, got {other:?}"),
        }
        // Truncated payload points at the end of the file.
        let ok = idx_image_bytes(&[vec![0u8; 4]], 2, 2);
        match parse_idx_images(&ok[..ok.len() - 1]) {
            Err(crate::Error::Ingest { .. }) => {}
            other => panic!("expected ingest error, got {other:?}"),
        }
    }
}
