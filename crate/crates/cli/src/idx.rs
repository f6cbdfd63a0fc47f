//! Reader for the IDX format used by MNIST-style image sets.
//!
//! A file starts with two zero bytes, a type byte (only `0x08`, unsigned
//! bytes, is supported) and a dimension count, followed by that many
//! big-endian `u32` extents and the raw data.

use std::path::Path;

use balquant_core::data::Dataset;
use balquant_core::Tensor;

use crate::error::{Error, Result};

/// Magic of a rank-3 image file.
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic of a rank-1 label file.
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format("not an IDX file"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(format!("IDX element type {:#04x} is not supported", bytes[2])));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::format("truncated IDX header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let n = dims.iter().product::<usize>();
    if bytes.len() - header != n {
        return Err(Error::format(format!(
            "IDX header promises {n} bytes, file holds {}",
            bytes.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read(path: &Path, magic: u32) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 4 && u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) != magic {
        return Err(Error::format(format!("{}: expected IDX magic {magic:#010x}", path.display())));
    }
    parse(&bytes)
}

/// Pairs an image file with a label file. Each image is flattened into one
/// feature row of raw byte values.
pub fn load_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read(images, IMAGES_MAGIC)?;
    let lab = read(labels, LABELS_MAGIC)?;
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::format(format!("{n} images but {} labels", lab.dims[0])));
    }
    if n == 0 {
        return Err(Error::format("IDX file holds no images"));
    }
    let dim = img.dims[1..].iter().product::<usize>();
    let features = Tensor::matrix(n, dim, img.data.iter().map(|&b| b as f64).collect())?;
    let labels: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    Ok(Dataset::new(features, labels, classes)?)
}

/// Encodes unsigned bytes as IDX; used to write fixtures.
pub fn encode(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_data() {
        let bytes = encode(&[2, 2, 3], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()), IMAGES_MAGIC);
        let a = parse(&bytes).unwrap();
        assert_eq!(a.dims, vec![2, 2, 3]);
        assert_eq!(a.data[11], 11);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse(&[0, 0, 0x0d, 1, 0, 0, 0, 1, 0, 0, 0, 0]).is_err());
        assert!(parse(&encode(&[3], &[1, 2])[..8]).is_err());
        let mut long = encode(&[2], &[1, 2]);
        long.push(3);
        assert!(parse(&long).is_err());
    }

    #[test]
    fn dataset_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&ip, encode(&[3, 2, 2], &[0, 255, 0, 255, 9, 9, 9, 9, 1, 2, 3, 4])).unwrap();
        std::fs::write(&lp, encode(&[3], &[0, 2, 1])).unwrap();
        let d = load_dataset(&ip, &lp).unwrap();
        assert_eq!(d.features.shape(), &[3, 4]);
        assert_eq!(d.classes, 3);
        assert!(load_dataset(&lp, &ip).is_err());
    }
}
