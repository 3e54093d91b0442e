//! Labeled image sets: a synthetic shape generator and the CIFAR-10 binary
//! batch reader. Pixels are HWC row-major in `[0, 1]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamLabel};

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Mean and standard deviation over every pixel value.
    pub fn pixel_stats(&self) -> (f64, f64) {
        let n = self.images.len().max(1) as f64;
        let mean = self.images.iter().sum::<f64>() / n;
        let var = self.images.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Images and labels of `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut images = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            images,
            labels,
            ..self.header()
        }
    }

    fn header(&self) -> Dataset {
        Dataset {
            images: Vec::new(),
            labels: Vec::new(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            num_classes: self.num_classes,
        }
    }

    /// Deterministic shuffled split into `(train, test)` with `test_count`
    /// held-out samples.
    pub fn split(&self, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if test_count >= self.len() {
            return Err(Error::config(format!(
                "cannot hold out {test_count} of {} samples",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        RngStream::substream(seed, StreamLabel::Data, 0x5B11).shuffle(&mut order);
        let (test, train) = order.split_at(test_count);
        Ok((self.subset(train), self.subset(test)))
    }

    /// Nearest-neighbour resize and channel conversion (mean for gray).
    pub fn resized(&self, side: usize, channels: usize) -> Result<Dataset> {
        if side == 0 || !(channels == 1 || channels == self.channels) {
            return Err(Error::config(format!(
                "cannot convert {}-channel images to {side}x{side}x{channels}",
                self.channels
            )));
        }
        let mut out = Dataset {
            images: Vec::with_capacity(self.len() * side * side * channels),
            ..self.clone()
        };
        out.labels = self.labels.clone();
        for i in 0..self.len() {
            let img = self.image(i);
            for y in 0..side {
                let sy = y * self.height / side;
                for x in 0..side {
                    let sx = x * self.width / side;
                    let px = &img[(sy * self.width + sx) * self.channels..][..self.channels];
                    if channels == self.channels {
                        out.images.extend_from_slice(px);
                    } else {
                        out.images.push(px.iter().sum::<f64>() / self.channels as f64);
                    }
                }
            }
        }
        out.height = side;
        out.width = side;
        out.channels = channels;
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternFamily {
    /// One filled outline per class (square, disk, cross, ...) at a random
    /// position and size.
    Shapes,
    /// Sinusoidal stripes whose orientation encodes the class, with random
    /// phase and period.
    Stripes,
}

/// Parametric patterns on a flat background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_family")]
    pub family: PatternFamily,
    /// Number of classes; at most [`SHAPES`] for the shape family.
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Background intensity.
    pub background: f64,
    /// Peak intensity added by the pattern.
    pub contrast: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
}

fn default_family() -> PatternFamily {
    PatternFamily::Shapes
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            family: PatternFamily::Shapes,
            classes: 4,
            per_class: 500,
            image_size: 16,
            channels: 1,
            background: 0.5,
            contrast: 0.25,
            noise: 0.05,
        }
    }
}

pub const SHAPES: usize = 6;

/// Whether `(y, x)` lies in shape `class` centred at `(cy, cx)` with half-size `r`.
fn inside(class: usize, y: f64, x: f64, cy: f64, cx: f64, r: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    match class {
        0 => dy.abs() <= r && dx.abs() <= r,
        1 => dy * dy + dx * dx <= r * r,
        2 => (dy.abs() <= r && dx.abs() <= r / 3.0) || (dx.abs() <= r && dy.abs() <= r / 3.0),
        3 => dy <= r && dy >= -r && dx.abs() <= (dy + r) / 2.0,
        4 => {
            let d2 = dy * dy + dx * dx;
            d2 <= r * r && d2 >= (r * 0.55) * (r * 0.55)
        }
        _ => (dy - dx).abs() <= r / 2.5 && dy.abs() <= r,
    }
}

pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.classes == 0 || (spec.family == PatternFamily::Shapes && spec.classes > SHAPES) {
        return Err(Error::config(format!(
            "synthetic shape classes must be in 1..={SHAPES}, got {}",
            spec.classes
        )));
    }
    if spec.image_size < 6 || spec.channels == 0 || spec.per_class == 0 {
        return Err(Error::config(
            "synthetic images need side >= 6 and at least one sample and channel",
        ));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::config(format!(
            "synthetic noise must be >= 0, got {}",
            spec.noise
        )));
    }
    let side = spec.image_size;
    let s = side as f64;
    let mut rng = RngStream::new(seed, StreamLabel::Data);
    let n = spec.classes * spec.per_class;
    let mut images = Vec::with_capacity(n * side * side * spec.channels);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes;
        let pattern: Box<dyn Fn(f64, f64) -> f64> = match spec.family {
            PatternFamily::Shapes => {
                let r = s * rng.uniform_range(0.22, 0.32);
                let cy = rng.uniform_range(r, s - r);
                let cx = rng.uniform_range(r, s - r);
                Box::new(move |y, x| if inside(class, y, x, cy, cx, r) { 1.0 } else { 0.0 })
            }
            PatternFamily::Stripes => {
                let angle = std::f64::consts::PI * class as f64 / spec.classes as f64;
                let period = rng.uniform_range(3.5, 5.0);
                let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                let (c, sn) = (angle.cos(), angle.sin());
                let k = std::f64::consts::TAU / period;
                Box::new(move |y, x| 0.5 * (1.0 + (k * (x * c + y * sn) + phase).sin()))
            }
        };
        for y in 0..side {
            for x in 0..side {
                let base = spec.background + spec.contrast * pattern(y as f64 + 0.5, x as f64 + 0.5);
                for _ in 0..spec.channels {
                    images.push((base + spec.noise * rng.normal()).clamp(0.0, 1.0));
                }
            }
        }
        labels.push(class);
    }
    Ok(Dataset {
        images,
        labels,
        height: side,
        width: side,
        channels: spec.channels,
        num_classes: spec.classes,
    })
}

/// Parses CIFAR-10 binary records (label byte then 1024 R, 1024 G, 1024 B
/// bytes) into HWC images.
pub fn parse_cifar10(bytes: &[u8], base_offset: u64) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::Data {
            offset: base_offset + whole as u64,
            detail: format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                bytes.len() - whole
            ),
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let count = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(count * plane * 3);
    let mut labels = Vec::with_capacity(count);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Data {
                offset: base_offset + (r * CIFAR_RECORD) as u64,
                detail: format!("label byte {label} is not a CIFAR-10 class"),
            });
        }
        labels.push(label);
        for p in 0..plane {
            for c in 0..3 {
                images.push(f64::from(rec[1 + c * plane + p]) / 255.0);
            }
        }
    }
    Ok(Dataset {
        images,
        labels,
        height: CIFAR_SIDE,
        width: CIFAR_SIDE,
        channels: 3,
        num_classes: 10,
    })
}

/// Reads every `data_batch_*.bin` / `test_batch.bin` file in `dir`, sorted by name.
pub fn load_cifar10_dir(dir: &Path) -> Result<Dataset> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".bin") && (n.starts_with("data_batch") || n.starts_with("test_batch")))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data {
            offset: 0,
            detail: format!("no CIFAR-10 batch files in {}", dir.display()),
        });
    }
    let mut all: Option<Dataset> = None;
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        let part = parse_cifar10(&bytes, 0).map_err(|e| match e {
            Error::Data { offset, detail } => Error::Data {
                offset,
                detail: format!("{}: {detail}", f.display()),
            },
            other => other,
        })?;
        match &mut all {
            None => all = Some(part),
            Some(d) => {
                d.images.extend(part.images);
                d.labels.extend(part.labels);
            }
        }
    }
    Ok(all.expect("at least one file"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_counts_and_range() {
        let d = synthetic(&SyntheticSpec::default(), 3).unwrap();
        assert_eq!(d.len(), 2000);
        assert_eq!(d.sample_len(), 256);
        assert!(d.images.iter().all(|v| (0.0..=1.0).contains(v)));
        for c in 0..4 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 500);
        }
    }

    #[test]
    fn stripes_allow_many_classes() {
        let spec = SyntheticSpec {
            family: PatternFamily::Stripes,
            classes: 8,
            per_class: 3,
            ..Default::default()
        };
        let d = synthetic(&spec, 1).unwrap();
        assert_eq!(d.len(), 24);
        assert!(synthetic(
            &SyntheticSpec {
                classes: 8,
                ..Default::default()
            },
            1
        )
        .is_err());
    }

    #[test]
    fn same_seed_same_split() {
        let d = synthetic(
            &SyntheticSpec {
                per_class: 20,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let (a, b) = d.split(10, 8).unwrap();
        let (c, e) = d.split(10, 8).unwrap();
        assert_eq!((a.len(), b.len()), (70, 10));
        assert_eq!(a, c);
        assert_eq!(b, e);
        assert_ne!(d.split(10, 9).unwrap().1, b);
    }

    #[test]
    fn cifar_record_layout() {
        let mut rec = vec![0u8; CIFAR_RECORD * 2];
        rec[0] = 7;
        rec[1] = 255; // R of pixel 0
        rec[1 + 1024] = 51; // G of pixel 0
        rec[CIFAR_RECORD] = 2;
        let d = parse_cifar10(&rec, 0).unwrap();
        assert_eq!(d.labels, vec![7, 2]);
        assert_eq!(&d.image(0)[..3], &[1.0, 0.2, 0.0]);
    }

    #[test]
    fn malformed_cifar_reports_offsets() {
        let bytes = vec![0u8; CIFAR_RECORD + 10];
        match parse_cifar10(&bytes, 0) {
            Err(Error::Data { offset, .. }) => assert_eq!(offset, CIFAR_RECORD as u64),
            other => panic!("{other:?}"),
        }
        let mut bytes = vec![0u8; CIFAR_RECORD * 3];
        bytes[2 * CIFAR_RECORD] = 12;
        match parse_cifar10(&bytes, 0) {
            Err(Error::Data { offset, .. }) => assert_eq!(offset, 2 * CIFAR_RECORD as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resize_to_gray() {
        let d = Dataset {
            images: vec![0.0, 0.3, 0.6, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5],
            labels: vec![1],
            height: 2,
            width: 2,
            channels: 3,
            num_classes: 2,
        };
        let g = d.resized(1, 1).unwrap();
        assert_eq!(g.images.len(), 1);
        assert!((g.images[0] - 0.3).abs() < 1e-12);
    }
}
