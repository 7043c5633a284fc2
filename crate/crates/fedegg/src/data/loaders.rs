//! Binary dataset loaders: CIFAR-10 batch files and the "FEDF" feature
//! file format for externally precomputed embeddings.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

const CIFAR_RECORD: usize = 3073; // 1 label byte + 32*32*3 pixels
const CIFAR_PIXELS: usize = 3072;
const FEDF_MAGIC: &[u8; 4] = b"FEDF";

/// Loads a CIFAR-10 binary batch: per record one label byte then 3072
/// row-major R,G,B plane bytes, pixels scaled to [0, 1].
pub fn load_cifar10_bin(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::BadFormat(format!(
            "{}: empty file",
            path.display()
        )));
    }
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::BadFormat(format!(
            "{}: length {} is not a multiple of {CIFAR_RECORD}",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut features = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: 10,
            });
        }
        labels.push(label);
        features.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(features, labels, CIFAR_PIXELS, 10)
}

/// Loads a FEDF feature file: magic "FEDF", little-endian u32 n, u32 d,
/// u32 k, then n records of (u16 label, d x f32 features).
pub fn load_feature_file(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != FEDF_MAGIC {
        return Err(Error::BadFormat(format!(
            "{}: missing FEDF magic",
            path.display()
        )));
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let n = read_u32(4) as usize;
    let d = read_u32(8) as usize;
    let k = read_u32(12) as usize;
    let record = 2 + 4 * d;
    let expected = 16 + n * record;
    if bytes.len() != expected {
        return Err(Error::BadFormat(format!(
            "{}: declared n={n}, d={d} implies {expected} bytes, file has {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let off = 16 + i * record;
        let label = u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap()) as usize;
        labels.push(label);
        for j in 0..d {
            let foff = off + 2 + 4 * j;
            let v = f32::from_le_bytes(bytes[foff..foff + 4].try_into().unwrap());
            features.push(v as f64);
        }
    }
    Dataset::new(features, labels, d, k)
}

/// Writes a dataset in the FEDF format. Features are narrowed to f32.
pub fn write_feature_file(path: &Path, data: &Dataset) -> Result<()> {
    let n = data.len();
    let d = data.dim();
    let k = data.num_classes();
    if n > u32::MAX as usize || d > u32::MAX as usize || k > u16::MAX as usize + 1 {
        return Err(Error::BadFormat("dataset too large for FEDF".into()));
    }
    let mut bytes = Vec::with_capacity(16 + n * (2 + 4 * d));
    bytes.extend_from_slice(FEDF_MAGIC);
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.extend_from_slice(&(k as u32).to_le_bytes());
    for i in 0..n {
        bytes.extend_from_slice(&(data.label(i) as u16).to_le_bytes());
        for &v in data.row(i) {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}
