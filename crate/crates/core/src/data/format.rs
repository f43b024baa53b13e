//! DVDS: `"DVDS"`, then version, class count, sample count, height and width
//! as `u32`, then one `u32` label per sample, then the pixels as `f32`. All
//! little-endian.

use super::Dataset;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 4] = b"DVDS";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn write_dataset(dataset: &Dataset, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + dataset.len() * 4 + dataset.images().len() * 4);
    buf.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION as usize, dataset.class_count(), dataset.len(), dataset.height(), dataset.width()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &l in dataset.labels() {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &p in dataset.images() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn word(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn read_dataset(input: &mut impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::MalformedHeader("bad magic, expected DVDS".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let version = word(&bytes, 4);
    if version != DATASET_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported dataset version {version}")));
    }
    let [classes, count, height, width] = [8, 12, 16, 20].map(|at| word(&bytes, at) as usize);
    let expected = (count as u128) * (4 + 4 * height as u128 * width as u128) + HEADER_LEN as u128;
    if (bytes.len() as u128) < expected {
        return Err(Error::Truncated(format!("expected {expected} bytes, file has {}", bytes.len())));
    }
    if bytes.len() as u128 != expected {
        return Err(Error::MalformedHeader(format!("{} trailing bytes", bytes.len() as u128 - expected)));
    }
    let labels: Vec<usize> = (0..count).map(|i| word(&bytes, HEADER_LEN + 4 * i) as usize).collect();
    let start = HEADER_LEN + 4 * count;
    let images = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Dataset::new(classes, height, width, labels, images)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(dataset, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(&mut std::fs::File::open(path)?)
}
