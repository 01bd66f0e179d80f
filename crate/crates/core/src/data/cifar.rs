//! CIFAR-10 binary records: one label byte then 3072 pixel bytes (R, G, B planes of 32×32).

use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 3073;
pub const PIXELS: usize = 3072;
pub const CLASSES: usize = 10;
const PLANE: usize = 1024;

/// Decodes records to pixels in `[0, 1]`.
pub fn parse_cifar10_records(bytes: &[u8], split: Split, provenance: String) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::Data("empty CIFAR-10 file".into()));
    }
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::Data(format!(
            "truncated record: {} bytes is not a multiple of {RECORD_LEN}",
            bytes.len()
        )));
    }
    let count = bytes.len() / RECORD_LEN;
    let mut x = Array2::zeros((count, PIXELS));
    let mut labels = Vec::with_capacity(count);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::Data(format!("record {i} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        for (j, &p) in rec[1..].iter().enumerate() {
            x[[i, j]] = p as f64 / 255.0;
        }
    }
    Dataset::new(x, labels, CLASSES, split, provenance)
}

/// Reads and concatenates record files; provenance is the SHA-256 of the concatenated bytes.
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for p in paths {
        let b = std::fs::read(p.as_ref())?;
        if b.len() % RECORD_LEN != 0 {
            return Err(Error::Data(format!(
                "{}: {} bytes is not a whole number of records",
                p.as_ref().display(),
                b.len()
            )));
        }
        bytes.extend_from_slice(&b);
    }
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    parse_cifar10_records(&bytes, split, format!("cifar10:sha256={hex}"))
}

/// Inverse of [`parse_cifar10_records`] for unstandardized pixels.
pub fn encode_cifar10_records(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.d_in() != PIXELS || ds.classes != CLASSES {
        return Err(Error::Data("dataset is not in CIFAR-10 layout".into()));
    }
    let mut out = Vec::with_capacity(ds.len() * RECORD_LEN);
    for (i, &y) in ds.labels.iter().enumerate() {
        out.push(y as u8);
        for j in 0..PIXELS {
            let v = ds.inputs[[i, j]] * 255.0;
            if !(-0.5..255.5).contains(&v) {
                return Err(Error::Data(format!("pixel value {} out of range", ds.inputs[[i, j]])));
            }
            out.push(v.round() as u8);
        }
    }
    Ok(out)
}

/// Per-channel mean and standard deviation, fitted on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn fit(train: &Dataset) -> Result<ChannelStats> {
        if train.split != Split::Train {
            return Err(Error::Data("channel statistics must come from the train split".into()));
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        let count = (train.len() * PLANE) as f64;
        for c in 0..3 {
            let plane = train.inputs.slice(ndarray::s![.., c * PLANE..(c + 1) * PLANE]);
            let m = plane.sum() / count;
            let v = plane.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / count;
            mean[c] = m;
            std[c] = v.sqrt().max(1e-12);
        }
        Ok(ChannelStats { mean, std })
    }

    pub fn apply(&self, ds: &mut Dataset) {
        for c in 0..3 {
            let mut plane = ds.inputs.slice_mut(ndarray::s![.., c * PLANE..(c + 1) * PLANE]);
            plane.mapv_inplace(|x| (x - self.mean[c]) / self.std[c]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..PIXELS).map(fill));
        r
    }

    #[test]
    fn hand_crafted_records_decode_exactly() {
        let mut bytes = record(3, |j| (j % 256) as u8);
        bytes.extend(record(9, |j| if j < PLANE { 255 } else { 0 }));
        let ds = parse_cifar10_records(&bytes, Split::Train, "test".into()).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.inputs[[0, 5]], 5.0 / 255.0);
        assert_eq!(ds.inputs[[1, 0]], 1.0);
        assert_eq!(ds.inputs[[1, PLANE]], 0.0);
        assert_eq!(encode_cifar10_records(&ds).unwrap(), bytes);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(parse_cifar10_records(&[], Split::Train, String::new()).is_err());
        let r = record(1, |_| 7);
        assert!(parse_cifar10_records(&r[..RECORD_LEN - 1], Split::Train, String::new()).is_err());
        let bad = record(10, |_| 0);
        assert!(parse_cifar10_records(&bad, Split::Train, String::new()).is_err());
    }

    #[test]
    fn standardization_uses_train_statistics() {
        let mut bytes = record(0, |j| (j / PLANE * 100) as u8);
        bytes.extend(record(1, |j| (j / PLANE * 100 + 20) as u8));
        let mut ds = parse_cifar10_records(&bytes, Split::Train, String::new()).unwrap();
        let stats = ChannelStats::fit(&ds).unwrap();
        stats.apply(&mut ds);
        let m: f64 = ds.inputs.column(0).sum();
        assert!(m.abs() < 1e-12);
        let mut test = parse_cifar10_records(&bytes, Split::Test, String::new()).unwrap();
        assert!(ChannelStats::fit(&test).is_err());
        stats.apply(&mut test);
        assert_eq!(test.inputs, ds.inputs);
    }
}
