//! Labeled datasets: IDX files and synthetic generators.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::qtensor::{numel, FloatTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major samples, `len() * numel(sample_shape)` values.
    pub samples: Vec<f32>,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        samples: Vec<f32>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let per = numel(&sample_shape);
        if per == 0 || samples.len() != per * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} samples of shape {sample_shape:?}",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            samples,
            sample_shape,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = numel(&self.sample_shape);
        &self.samples[i * per..(i + 1) * per]
    }

    /// Gathers `indices` into an `[n, ...sample_shape]` tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<(FloatTensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * numel(&self.sample_shape));
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Run(format!("sample {i} out of range")));
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Ok((FloatTensor::new(data, shape)?, labels))
    }

    /// The first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        let n = n.min(self.len());
        let per = numel(&self.sample_shape);
        Ok((
            Dataset::new(
                self.samples[..n * per].to_vec(),
                self.sample_shape.clone(),
                self.labels[..n].to_vec(),
                self.classes,
            )?,
            Dataset {
                samples: self.samples[n * per..].to_vec(),
                sample_shape: self.sample_shape.clone(),
                labels: self.labels[n..].to_vec(),
                classes: self.classes,
            },
        ))
    }

    /// Shuffled full batches for one epoch; the remainder is dropped so every
    /// step sees the planned batch size.
    pub fn epoch_batches(&self, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        order
            .chunks_exact(batch.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// `n` samples from `classes` isotropic Gaussian blobs in `features` dims.
pub fn gen_blobs(n: usize, features: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || features == 0 {
        return Err(Error::InvalidArgument(
            "blobs need ≥ 2 classes and ≥ 1 feature".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..features).map(|_| 2.0 * unit.sample(&mut rng)).collect())
        .collect();
    let mut samples = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        samples.extend(centers[c].iter().map(|&m| m + 0.6 * unit.sample(&mut rng)));
        labels.push(c);
    }
    shuffle_rows(
        Dataset::new(samples, vec![features], labels, classes)?,
        &mut rng,
    )
}

/// `n` single-channel `side × side` images from `classes` smooth random
/// templates with additive Gaussian noise.
pub fn gen_images(n: usize, side: usize, classes: usize, noise: f32, seed: u64) -> Result<Dataset> {
    if classes < 2 || side == 0 {
        return Err(Error::InvalidArgument(
            "images need ≥ 2 classes and a non-zero side".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
    let px = side * side;
    let templates: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            // A few random blobs per class make the classes spatially distinct.
            let mut t = vec![0f32; px];
            for _ in 0..3 {
                let (cy, cx) = (
                    rng.random_range(0.0..side as f32),
                    rng.random_range(0.0..side as f32),
                );
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for y in 0..side {
                    for x in 0..side {
                        let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                        t[y * side + x] += sign * (-d2 / 4.0).exp();
                    }
                }
            }
            t
        })
        .collect();
    let mut samples = Vec::with_capacity(n * px);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        samples.extend(
            templates[c]
                .iter()
                .map(|&v| v + noise * unit.sample(&mut rng)),
        );
        labels.push(c);
    }
    shuffle_rows(
        Dataset::new(samples, vec![1, side, side], labels, classes)?,
        &mut rng,
    )
}

fn shuffle_rows(d: Dataset, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(rng);
    let mut samples = Vec::with_capacity(d.samples.len());
    for &i in &order {
        samples.extend_from_slice(d.sample(i));
    }
    let labels = order.iter().map(|&i| d.labels[i]).collect();
    Dataset::new(samples, d.sample_shape, labels, d.classes)
}

/// Parses an IDX file of unsigned bytes. Returns dims and raw values.
pub fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, Vec<u8>)> {
    if bytes.len() < 4 {
        return Err(Error::Format("IDX file shorter than its magic".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::Format(format!(
            "unsupported IDX magic {:02x}{:02x}{:02x}{:02x}",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if rank == 0 || bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    match count {
        Some(c) if bytes.len() == header + c => Ok((dims, bytes[header..].to_vec())),
        Some(c) => Err(Error::Format(format!(
            "IDX body has {} bytes, header promises {c}",
            bytes.len() - header
        ))),
        None => Err(Error::Format("IDX dims overflow".into())),
    }
}

/// Loads an image file (magic 0x00000803) and a label file (0x00000801).
/// Pixels are scaled to [0, 1].
pub fn load_idx_dataset(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(&fs::read(images)?)?;
    let (ldims, raw_labels) = parse_idx(&fs::read(labels)?)?;
    if idims.len() != 3 || ldims.len() != 1 {
        return Err(Error::Format(format!(
            "expected [n, h, w] images and [n] labels, got {idims:?} and {ldims:?}"
        )));
    }
    if idims[0] != ldims[0] {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    let samples = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let labels = raw_labels.iter().map(|&l| l as usize).collect();
    Dataset::new(samples, vec![1, idims[1], idims[2]], labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(magic: [u8; 4], dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut v = magic.to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn idx_dims_honored() {
        let bytes = idx([0, 0, 8, 3], &[2, 2, 3], &[0; 12]);
        let (dims, body) = parse_idx(&bytes).unwrap();
        assert_eq!(dims, vec![2, 2, 3]);
        assert_eq!(body.len(), 12);
    }

    #[test]
    fn truncated_idx_is_format_error() {
        let bytes = idx([0, 0, 8, 3], &[2, 2, 3], &[0; 11]);
        assert!(matches!(parse_idx(&bytes), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Format(_))));
    }

    #[test]
    fn idx_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("x"), dir.path().join("y"));
        fs::write(
            &ip,
            idx([0, 0, 8, 3], &[2, 2, 2], &[0, 255, 0, 0, 51, 0, 0, 0]),
        )
        .unwrap();
        fs::write(&lp, idx([0, 0, 8, 1], &[2], &[1, 0])).unwrap();
        let d = load_idx_dataset(&ip, &lp, 2).unwrap();
        assert_eq!(d.sample_shape, vec![1, 2, 2]);
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.sample(0)[1], 1.0);
        assert!((d.sample(1)[0] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(
            gen_blobs(50, 4, 2, 7).unwrap(),
            gen_blobs(50, 4, 2, 7).unwrap()
        );
        assert_ne!(
            gen_images(20, 8, 10, 0.5, 1).unwrap(),
            gen_images(20, 8, 10, 0.5, 2).unwrap()
        );
    }

    #[test]
    fn epoch_batches_drop_remainder() {
        let d = gen_blobs(10, 2, 2, 0).unwrap();
        let b = d.epoch_batches(4, 0, 0);
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| x.len() == 4));
        assert_ne!(d.epoch_batches(4, 0, 0), d.epoch_batches(4, 0, 1));
    }
}
