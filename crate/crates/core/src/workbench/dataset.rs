//! IDX files and synthetic blob images.

use std::path::Path;

use super::config::SynthSpec;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::trainer::Dataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset(format!("{}: truncated header", path.display())))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::Dataset(format!(
            "{}: bad magic 0x{magic:08x}, expected 0x{expected:08x}",
            path.display()
        )));
    }
    Ok(())
}

/// Images as `[n, rows, cols]` bytes scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::Dataset(format!(
            "{}: header declares {n}x{rows}x{cols} = {expected} bytes, payload has {}",
            path.display(),
            payload.len()
        )));
    }
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Dataset(format!(
            "{}: header declares {n} labels, payload has {}",
            path.display(),
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair. `classes` defaults to one past the
/// largest label.
pub fn load_idx_dataset(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let x = read_idx_images(images)?;
    let y = read_idx_labels(labels)?;
    if x.shape()[0] != y.len() {
        return Err(Error::Dataset(format!(
            "{} has {} images but {} has {} labels",
            images.display(),
            x.shape()[0],
            labels.display(),
            y.len()
        )));
    }
    let classes = classes.unwrap_or_else(|| y.iter().max().map_or(0, |m| m + 1));
    Dataset::new(x, y, classes)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows == 0 || cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(Error::invalid(format!(
            "{} pixels do not tile {rows}x{cols} images",
            pixels.len()
        )));
    }
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Blob {
    cy: f64,
    cx: f64,
    width: f64,
    amp: Vec<f64>,
}

/// Two Gaussian blobs per class with per-channel amplitudes.
fn class_prototypes(spec: &SynthSpec, seed: u64) -> Vec<[Blob; 2]> {
    use rand::Rng as _;
    let mut r = rng::seeded(rng::derive_seed(seed, 0x5e7));
    let hi = (spec.size as f64 - 1.0).max(0.0);
    let blob = |r: &mut Rng| Blob {
        cy: r.random_range(0.0..=hi),
        cx: r.random_range(0.0..=hi),
        width: r.random_range(0.8..1.8) * spec.size as f64 / 8.0,
        amp: (0..spec.channels).map(|_| r.random_range(0.5..1.0)).collect(),
    };
    (0..spec.classes).map(|_| [blob(&mut r), blob(&mut r)]).collect()
}

/// Deterministic class-conditional blob images, `samples_per_class` per
/// class, interleaved by class. Each sample jitters its blob centers by up
/// to half a pixel and adds `N(0, noise^2)` pixel noise, clipped to `[0, 1]`.
/// Sets drawn with the same `seed` but different `split` share prototypes.
pub fn synth_dataset(
    spec: &SynthSpec,
    samples_per_class: usize,
    seed: u64,
    split: u64,
) -> Result<Dataset> {
    use rand::Rng as _;
    if spec.classes == 0 || spec.channels == 0 || spec.size == 0 || samples_per_class == 0 {
        return Err(Error::invalid("synthetic dataset dimensions must be positive"));
    }
    let protos = class_prototypes(spec, seed);
    let mut r = rng::seeded(rng::derive_seed(seed, 0x1000 + split));
    let (c, s) = (spec.channels, spec.size);
    let n = spec.classes * samples_per_class;
    let mut data = Vec::with_capacity(n * c * s * s);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..samples_per_class {
        for (label, blobs) in protos.iter().enumerate() {
            let shifts: Vec<(f64, f64)> = blobs
                .iter()
                .map(|_| (r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)))
                .collect();
            for ch in 0..c {
                for y in 0..s {
                    for x in 0..s {
                        let mut v = 0.0;
                        for (b, (dy, dx)) in blobs.iter().zip(&shifts) {
                            let ry = y as f64 - (b.cy + dy);
                            let rx = x as f64 - (b.cx + dx);
                            v += b.amp[ch] * (-(ry * ry + rx * rx) / (2.0 * b.width * b.width)).exp();
                        }
                        v += spec.noise * rng::standard_normal(&mut r);
                        data.push(v.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            labels.push(label);
        }
    }
    Dataset::new(Tensor::new(vec![n, c, s, s], data)?, labels, spec.classes)
}

/// Train and test sets of a synthetic spec.
pub fn synth_split(spec: &SynthSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    Ok((
        synth_dataset(spec, spec.train_per_class, seed, 0)?,
        synth_dataset(spec, spec.test_per_class, seed, 1)?,
    ))
}
